//! Post-training optimization: constant fusion, FP16 conversion and
//! calibrated INT8 quantization with FP32 graph inputs and outputs.
//!
//! INT8 weights are quantized per output channel with
//! `scale_c = max(max|w_c|, 1e-8) / 127`; activations per tensor with
//! `scale = max(|min|, |max|) / 127` from the calibration profile.

mod calibrate;
mod fuse;
mod rewrite;

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bundle::{BundleError, Metadata, ModelBundle, Variant, Weight};
use crate::engine::EngineError;
use crate::graph::{Graph, OpKind};
use crate::tensor::{Tensor, TensorError};

pub use calibrate::{calibrate, CalibrationProfile, Method, Range};
pub use fuse::fuse_constants;
pub use rewrite::{channel_scales, convert_fp16, quantize_int8};

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("calibration needs at least one image")]
    EmptyDataset,
    #[error("no calibration range for node `{0}`")]
    MissingCalibration(String),
    #[error("source bundle must be FP32, found {0:?}")]
    NotFp32(Variant),
    #[error("unknown node `{0}` in precision overrides")]
    UnknownNode(String),
    #[error("unsupported graph: {0}")]
    Unsupported(String),
    #[error("calibration table line {line}: expected `node<TAB>min<TAB>max<TAB>samples`")]
    ProfileSyntax { line: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Nodes kept at FP32 in a low-precision variant. Input nodes are always
/// FP32, and outputs are cast back to FP32.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecisionPlan {
    pub excluded: BTreeSet<String>,
}

impl PrecisionPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_excluded<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        PrecisionPlan {
            excluded: ids.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_excluded(&self, id: &str) -> bool {
        self.excluded.contains(id)
    }

    /// Excludes every activation whose calibrated range is wider than 127×
    /// the median range, plus the `overrides`.
    pub fn from_profile<S: AsRef<str>>(
        graph: &Graph,
        profile: &CalibrationProfile,
        overrides: &[S],
    ) -> Result<Self, QuantError> {
        let mut widths: Vec<(&str, f32)> = graph
            .nodes
            .iter()
            .filter(|n| !matches!(n.op, OpKind::Const | OpKind::Input))
            .filter_map(|n| profile.get(&n.id).map(|r| (n.id.as_str(), r.width())))
            .collect();
        let mut excluded = BTreeSet::new();
        if !widths.is_empty() {
            let mut sorted: Vec<f32> = widths.iter().map(|w| w.1).collect();
            sorted.sort_by(f32::total_cmp);
            let mid = sorted.len() / 2;
            let median = if sorted.len() % 2 == 0 {
                (sorted[mid - 1] + sorted[mid]) / 2.0
            } else {
                sorted[mid]
            };
            if median > 0.0 {
                widths.retain(|&(_, w)| w > 127.0 * median);
                excluded.extend(widths.into_iter().map(|(id, _)| id.to_string()));
            }
        }
        for o in overrides {
            let id = o.as_ref();
            if graph.node(id).is_none() {
                return Err(QuantError::UnknownNode(id.to_string()));
            }
            excluded.insert(id.to_string());
        }
        Ok(PrecisionPlan { excluded })
    }
}

/// Validates a rewritten graph and drops weights no surviving node uses.
pub(crate) fn rebuild(metadata: Metadata, graph: Graph, weights: Vec<Weight>) -> Result<ModelBundle, QuantError> {
    let mut graph = graph.validate().map_err(BundleError::from)?;
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut kept = Vec::new();
    for n in &mut graph.nodes {
        if let Some(w) = n.weight {
            let idx = *remap.entry(w).or_insert_with(|| {
                kept.push(weights[w].clone());
                kept.len() - 1
            });
            n.weight = Some(idx);
        }
    }
    Ok(ModelBundle::new(metadata, graph, kept)?)
}

/// Directory of a variant written next to `base`, e.g. `model` → `model-int8`.
pub fn variant_path(base: &Path, v: Variant) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(v.suffix());
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct VariantSet {
    pub fp32opt: ModelBundle,
    pub fp16: ModelBundle,
    pub int8: ModelBundle,
    pub profile: CalibrationProfile,
    pub plan: PrecisionPlan,
}

/// Fuses, calibrates on the fused graph, then derives the FP16 and INT8
/// variants with a shared precision plan.
pub fn build_variants<S: AsRef<str>>(
    original: &ModelBundle,
    calibration: &[Tensor],
    method: Method,
    overrides: &[S],
) -> Result<VariantSet, QuantError> {
    let fp32opt = fuse_constants(original)?;
    let profile = calibrate(&fp32opt, calibration, method)?;
    let plan = PrecisionPlan::from_profile(fp32opt.graph(), &profile, overrides)?;
    let fp16 = convert_fp16(&fp32opt, &plan)?;
    let int8 = quantize_int8(&fp32opt, &profile, &plan)?;
    Ok(VariantSet {
        fp32opt,
        fp16,
        int8,
        profile,
        plan,
    })
}

impl VariantSet {
    /// Writes `<base>-fp32opt`, `<base>-fp16`, `<base>-int8` and the
    /// calibration table `<base>-int8/calibration.tsv`.
    pub fn save(&self, base: &Path) -> Result<(), QuantError> {
        for b in [&self.fp32opt, &self.fp16, &self.int8] {
            b.save(variant_path(base, b.variant()))?;
        }
        let table = variant_path(base, Variant::Int8).join("calibration.tsv");
        std::fs::write(&table, self.profile.to_table()).map_err(|source| BundleError::Io { path: table, source })?;
        Ok(())
    }
}
