//! Transfer learning on a frozen backbone: pooled features are extracted
//! once, a dense head is trained with Adam, and the head is appended to the
//! backbone graph as MatMul + AddV2.

mod features;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{BundleError, ModelBundle, Variant, Weight};
use crate::engine::{sigmoid, EngineError};
use crate::graph::{Attrs, Graph, Node, OpKind};
use crate::tensor::Tensor;

pub use features::{features_of, FeatureExtractor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("labels contain a single class; need at least two")]
    SingleClass,
    #[error("{0} features but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bundle has no feature node")]
    NoFeatureNode,
    #[error("feature node `{0}` already feeds a head")]
    FeatureNodeConsumed(String),
    #[error("head expects {head} features, backbone yields {backbone}")]
    WidthMismatch { head: usize, backbone: usize },
    #[error("feature cache {path}: {source}")]
    Cache {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    BinaryCrossEntropy,
    CategoricalCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub folds: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Two classes train a single sigmoid logit with binary cross-entropy;
    /// more classes use softmax with categorical cross-entropy.
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 0.001,
            folds: 5,
            epochs: 50,
            adam: AdamConfig::default(),
            loss: Loss::BinaryCrossEntropy,
            seed: 0,
        }
    }
}

/// Binary cross-entropy of a logit `z` against `y`, and its derivative with
/// respect to `z`. Computed as softplus so large logits stay finite.
pub fn bce_loss(z: f64, y: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - y)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let (mh, vh) = (state.m[i] / c1, state.v[i] / c2);
        params[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Dense head over standardized features. Parameters are `weights`
/// (`inputs × outputs`, row-major) followed by `bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub inputs: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Class a single-logit head scores.
    pub positive_class: usize,
}

impl Head {
    pub fn new(inputs: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("finite std");
        let mut params: Vec<f64> = (0..inputs * outputs).map(|_| normal.sample(&mut rng)).collect();
        params.extend(std::iter::repeat_n(0.0, outputs));
        Head {
            inputs,
            outputs,
            params,
            mean: vec![0.0; inputs],
            std: vec![1.0; inputs],
            positive_class: 0,
        }
    }

    pub fn standardize(&self, x: &[f32]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| (f64::from(v) - m) / s)
            .collect()
    }

    fn logits_std(&self, x: &[f64]) -> Vec<f64> {
        let (w, b) = self.params.split_at(self.inputs * self.outputs);
        (0..self.outputs)
            .map(|j| b[j] + x.iter().enumerate().map(|(i, v)| v * w[i * self.outputs + j]).sum::<f64>())
            .collect()
    }

    pub fn logits(&self, features: &[f32]) -> Vec<f64> {
        self.logits_std(&self.standardize(features))
    }

    /// Predicted class for a raw feature row.
    pub fn predict(&self, features: &[f32]) -> usize {
        let z = self.logits(features);
        if self.outputs == 1 {
            if sigmoid(z[0]) >= 0.5 {
                self.positive_class
            } else {
                1 - self.positive_class
            }
        } else {
            argmax(&z)
        }
    }

    /// Mean loss and gradient over a batch of standardized rows.
    pub fn loss_and_grad(&self, x: &[Vec<f64>], y: &[usize]) -> (f64, Vec<f64>) {
        let (f, k) = (self.inputs, self.outputs);
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for (row, &label) in x.iter().zip(y) {
            let z = self.logits_std(row);
            let dz: Vec<f64> = if k == 1 {
                let target = f64::from(u8::from(label == self.positive_class));
                let (l, d) = bce_loss(z[0], target);
                total += l;
                vec![d]
            } else {
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                total += lse - z[label];
                let p = softmax64(&z);
                p.iter()
                    .enumerate()
                    .map(|(j, &pj)| pj - f64::from(u8::from(j == label)))
                    .collect()
            };
            for i in 0..f {
                for j in 0..k {
                    grad[i * k + j] += row[i] * dz[j];
                }
            }
            for j in 0..k {
                grad[f * k + j] += dz[j];
            }
        }
        let n = x.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (total / n, grad)
    }
}

fn softmax64(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a })
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were kept (1-based).
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_table(&self) -> String {
        let mut s = String::from("epoch\tsplit\tloss\taccuracy\n");
        for r in &self.records {
            let _ = writeln!(s, "{}\t{}\t{:.6}\t{:.4}", r.epoch, r.split, r.loss, r.accuracy);
        }
        s
    }

    pub fn series(&self, split: &str) -> Vec<&EpochRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

/// Labelled feature rows.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub features: &'a [Vec<f32>],
    pub labels: &'a [usize],
}

impl<'a> Samples<'a> {
    pub fn new(features: &'a [Vec<f32>], labels: &'a [usize]) -> Result<Self, TrainError> {
        if features.len() != labels.len() {
            return Err(TrainError::LengthMismatch(features.len(), labels.len()));
        }
        Ok(Samples { features, labels })
    }
}

fn evaluate(head: &Head, x: &[Vec<f64>], y: &[usize]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let (loss, _) = head.loss_and_grad(x, y);
    let correct = x
        .iter()
        .zip(y)
        .filter(|(row, &label)| {
            let z = head.logits_std(row);
            let pred = if head.outputs == 1 {
                if sigmoid(z[0]) >= 0.5 { head.positive_class } else { 1 - head.positive_class }
            } else {
                argmax(&z)
            };
            pred == label
        })
        .count();
    (loss, correct as f64 / x.len() as f64)
}

/// Mini-batch Adam over standardized features. Returns the weights of the
/// epoch with the best validation accuracy (training accuracy without a
/// validation set; earliest epoch on ties).
pub fn train_head(
    train: Samples,
    val: Option<Samples>,
    classes: usize,
    cfg: &TrainConfig,
) -> Result<(Head, TrainLog), TrainError> {
    let width = train.features.first().map_or(0, Vec::len);
    for s in std::iter::once(&train).chain(val.as_ref()) {
        if let Some(&label) = s.labels.iter().find(|&&l| l >= classes) {
            return Err(TrainError::LabelOutOfRange { label, classes });
        }
        if s.features.iter().any(|r| r.len() != width) {
            return Err(TrainError::ShapeMismatch("ragged feature rows".into()));
        }
    }
    let first = train.labels.first().copied();
    if classes < 2 || first.is_none() || train.labels.iter().all(|&l| Some(l) == first) {
        return Err(TrainError::SingleClass);
    }
    let outputs = match (cfg.loss, classes) {
        (Loss::BinaryCrossEntropy, 2) => 1,
        (Loss::BinaryCrossEntropy, _) => {
            return Err(TrainError::ShapeMismatch(format!(
                "binary cross-entropy needs 2 classes, got {classes}"
            )))
        }
        (Loss::CategoricalCrossEntropy, k) => k,
    };
    let mut head = Head::new(width, outputs, cfg.seed);
    let n = train.features.len() as f64;
    for i in 0..width {
        let col = train.features.iter().map(|r| f64::from(r[i]));
        let mean = col.clone().sum::<f64>() / n;
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        head.mean[i] = mean;
        head.std[i] = var.sqrt().max(1e-6);
    }
    let std_rows = |s: &Samples| -> Vec<Vec<f64>> { s.features.iter().map(|r| head.standardize(r)).collect() };
    let tx = std_rows(&train);
    let vx = val.as_ref().map(std_rows);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut state = AdamState::new(head.params.len());
    let mut order: Vec<usize> = (0..tx.len()).collect();
    let mut log = TrainLog::default();
    let mut best = (f64::NEG_INFINITY, head.params.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let bx: Vec<Vec<f64>> = batch.iter().map(|&i| tx[i].clone()).collect();
            let by: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (_, grad) = head.loss_and_grad(&bx, &by);
            adam_step(&mut head.params, &grad, &mut state, cfg.learning_rate, &cfg.adam)?;
        }
        let (loss, accuracy) = evaluate(&head, &tx, train.labels);
        log.records.push(EpochRecord { epoch, split: "train", loss, accuracy });
        let mut selection = accuracy;
        if let (Some(vx), Some(v)) = (&vx, &val) {
            let (loss, accuracy) = evaluate(&head, vx, v.labels);
            log.records.push(EpochRecord { epoch, split: "val", loss, accuracy });
            selection = accuracy;
        }
        if selection > best.0 {
            best = (selection, head.params.clone());
            log.best_epoch = epoch;
        }
    }
    head.params = best.1;
    Ok((head, log))
}

/// Appends the head at the backbone's feature node, folding the feature
/// standardization into the MatMul weights and bias. Upstream nodes are
/// untouched.
pub fn attach_head(b: &ModelBundle, head: &Head, classes: &[String]) -> Result<ModelBundle, TrainError> {
    let feature = b.metadata.feature_node.clone().ok_or(TrainError::NoFeatureNode)?;
    let graph = b.graph();
    if graph.node(&feature).is_none() {
        return Err(TrainError::NoFeatureNode);
    }
    if graph.consumers().contains_key(feature.as_str()) {
        return Err(TrainError::FeatureNodeConsumed(feature));
    }
    let shapes = b.shapes().map_err(BundleError::from)?;
    let width = shapes[&feature].last().copied().unwrap_or(0);
    if width != head.inputs {
        return Err(TrainError::WidthMismatch {
            head: head.inputs,
            backbone: width,
        });
    }
    let expected = if head.outputs == 1 { 2 } else { head.outputs };
    if classes.len() != expected {
        return Err(TrainError::ShapeMismatch(format!(
            "head scores {expected} classes, {} names given",
            classes.len()
        )));
    }
    let (f, k) = (head.inputs, head.outputs);
    let (w, bias) = head.params.split_at(f * k);
    let w_fold: Vec<f32> = (0..f * k).map(|idx| (w[idx] / head.std[idx / k]) as f32).collect();
    let b_fold: Vec<f32> = (0..k)
        .map(|j| (bias[j] - (0..f).map(|i| head.mean[i] / head.std[i] * w[i * k + j]).sum::<f64>()) as f32)
        .collect();

    let (mut metadata, mut graph, mut weights): (_, Graph, Vec<Weight>) = b.clone().into_parts();
    let mut push_const = |id: &str, t: Tensor, nodes: &mut Vec<Node>| {
        weights.push(Weight::Tensor(t));
        let mut n = Node::new(id, OpKind::Const, vec![], Attrs::default());
        n.weight = Some(weights.len() - 1);
        nodes.push(n);
    };
    let fresh = |base: &str| {
        let mut id = base.to_string();
        while graph.node(&id).is_some() {
            id.push('_');
        }
        id
    };
    let (w_id, mm_id, b_id, out_id) = (fresh("head/w"), fresh("head/matmul"), fresh("head/b"), fresh("head/logits"));
    let mut nodes = std::mem::take(&mut graph.nodes);
    push_const(&w_id, Tensor::from_f32(vec![f, k], w_fold).expect("shape"), &mut nodes);
    nodes.push(Node::new(&mm_id, OpKind::MatMul, vec![feature.clone(), w_id.clone()], Attrs::default()));
    push_const(&b_id, Tensor::from_f32(vec![k], b_fold).expect("shape"), &mut nodes);
    nodes.push(Node::new(&out_id, OpKind::AddV2, vec![mm_id, b_id], Attrs::default()));
    graph.nodes = nodes;
    for o in &mut graph.outputs {
        if *o == feature {
            *o = out_id.clone();
        }
    }
    metadata.variant = Variant::Fp32;
    metadata.classes = classes.to_vec();
    metadata.positive_class = (k == 1).then_some(head.positive_class);
    Ok(ModelBundle::new(metadata, graph, weights)?)
}
