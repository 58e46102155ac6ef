//! MicroMobileNet: a desk-scale inverted-residual backbone that uses every
//! operator kind except MatMul (added by the head) and Cast (added by the
//! quantizer).
//!
//! | stage | layers                                                  | out        |
//! |-------|---------------------------------------------------------|------------|
//! | stem  | Pad(0,1) → Conv 3×3/2 VALID → BN → Relu6                | 16×16×32   |
//! | b1    | DW 3×3 SAME → BN → Relu6 → Conv 1×1 → BN, skip AddV2    | 16×16×32   |
//! | b2    | Conv 1×1 ×6 → BN → Relu6 → Pad(0,1) → DW 3×3/2 VALID → BN → Relu6 → Conv 1×1 → BN | 8×8×64 |
//! | b3    | DW 3×3 SAME → BN → Relu6 → Conv 1×1 → BN, skip AddV2    | 8×8×64     |
//! | pool  | Mean over H, W                                          | 64         |
//!
//! Batch-norm is a per-channel Mul then AddV2 by constants, which
//! `fuse_constants` folds away.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bundle::{GraphBuilder, Metadata, ModelBundle, Variant};
use crate::data::{synth_dataset, DatasetManifest};
use crate::engine::{PreprocessSpec, ValueRange};
use crate::graph::{Attrs, OpKind, Padding};
use crate::tensor::Tensor;
use crate::train::{attach_head, train_head, FeatureExtractor, Samples, TrainConfig, TrainError};

pub const INPUT_SIZE: usize = 32;
pub const FEATURE_NODE: &str = "pool";
pub const FEATURE_WIDTH: usize = 64;

struct Net {
    b: GraphBuilder,
    rng: ChaCha8Rng,
}

impl Net {
    fn kernel(&mut self, id: &str, shape: Vec<usize>, fan_in: usize) -> String {
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        self.b.constant(id, Tensor::from_f32(shape, data).expect("shape matches"))
    }

    fn vector(&mut self, id: &str, n: usize, lo: f32, hi: f32) -> String {
        let data = (0..n).map(|_| self.rng.random_range(lo..hi)).collect();
        self.b.constant(id, Tensor::from_f32(vec![n], data).expect("shape matches"))
    }

    fn bn(&mut self, prefix: &str, x: &str, c: usize) -> String {
        let s = self.vector(&format!("{prefix}/bn_scale"), c, 0.8, 1.2);
        let m = self.b.op(&format!("{prefix}/bn_mul"), OpKind::Mul, &[x, &s], Attrs::default());
        let t = self.vector(&format!("{prefix}/bn_shift"), c, -0.1, 0.1);
        self.b.op(&format!("{prefix}/bn_add"), OpKind::AddV2, &[&m, &t], Attrs::default())
    }

    fn relu(&mut self, prefix: &str, x: &str) -> String {
        self.b.op(&format!("{prefix}/relu"), OpKind::Relu6, &[x], Attrs::default())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, prefix: &str, x: &str, k: usize, ci: usize, co: usize, stride: usize, pad: Padding) -> String {
        let w = self.kernel(&format!("{prefix}/w"), vec![k, k, ci, co], k * k * ci);
        let y = self.b.op(prefix, OpKind::Conv2D, &[x, &w], Attrs::conv([stride; 2], pad));
        self.bn(prefix, &y, co)
    }

    fn dw(&mut self, prefix: &str, x: &str, c: usize, stride: usize, pad: Padding) -> String {
        let w = self.kernel(&format!("{prefix}/w"), vec![3, 3, c, 1], 9);
        let y = self.b.op(prefix, OpKind::DepthwiseConv2D, &[x, &w], Attrs::conv([stride; 2], pad));
        self.bn(prefix, &y, c)
    }

    fn pad_br(&mut self, id: &str, x: &str) -> String {
        self.b.op(id, OpKind::Pad, &[x], Attrs::pad(vec![[0, 0], [0, 1], [0, 1], [0, 0]]))
    }
}

/// Builds the fixture backbone with seeded He-normal kernels. The output is
/// the pooled feature vector; `metadata.feature_node` names it.
pub fn micro_mobilenet(seed: u64) -> ModelBundle {
    let mut n = Net {
        b: GraphBuilder::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let x = n.b.input("input", vec![1, INPUT_SIZE, INPUT_SIZE, 3]);
    let x = n.b.op("input/identity", OpKind::Identity, &[&x], Attrs::default());

    let x = n.pad_br("stem/pad", &x);
    let x = n.conv("stem/conv", &x, 3, 3, 32, 2, Padding::Valid);
    let stem = n.relu("stem", &x);

    let x = n.dw("b1/dw", &stem, 32, 1, Padding::Same);
    let x = n.relu("b1/dw", &x);
    let x = n.conv("b1/project", &x, 1, 32, 32, 1, Padding::Valid);
    let b1 = n.b.op("b1/add", OpKind::AddV2, &[&stem, &x], Attrs::default());

    let x = n.conv("b2/expand", &b1, 1, 32, 192, 1, Padding::Valid);
    let x = n.relu("b2/expand", &x);
    let x = n.pad_br("b2/pad", &x);
    let x = n.dw("b2/dw", &x, 192, 2, Padding::Valid);
    let x = n.relu("b2/dw", &x);
    let b2 = n.conv("b2/project", &x, 1, 192, 64, 1, Padding::Valid);

    let x = n.dw("b3/dw", &b2, 64, 1, Padding::Same);
    let x = n.relu("b3/dw", &x);
    let x = n.conv("b3/project", &x, 1, 64, 64, 1, Padding::Valid);
    let b3 = n.b.op("b3/add", OpKind::AddV2, &[&b2, &x], Attrs::default());

    let pool = n.b.op(FEATURE_NODE, OpKind::Mean, &[&b3], Attrs::mean(vec![1, 2], false));
    n.b.output(&pool);

    let mut meta = Metadata::new(
        "micro-mobilenet",
        Variant::Fp32,
        PreprocessSpec::new(INPUT_SIZE, INPUT_SIZE, ValueRange::MinusOneOne),
    );
    meta.feature_node = Some(FEATURE_NODE.into());
    n.b.build(meta).expect("fixture graph is valid")
}

/// Synthetic two-class images under `root`, a head trained on the frozen
/// backbone's features, and the resulting classifier.
pub fn demo_classifier(root: &Path, per_class: usize, seed: u64) -> Result<(ModelBundle, DatasetManifest), TrainError> {
    let backbone = micro_mobilenet(seed);
    let m = synth_dataset(root, per_class, INPUT_SIZE as u32, seed)?;
    let features = FeatureExtractor::new(&backbone).extract(&m)?;
    let labels = m.labels();
    let cfg = TrainConfig {
        epochs: 20,
        seed,
        ..Default::default()
    };
    let (head, _) = train_head(Samples::new(&features, &labels)?, None, m.classes.len(), &cfg)?;
    Ok((attach_head(&backbone, &head, &m.classes)?, m))
}
