use std::path::Path;

use edgeclass_core::data::{DatasetManifest, Partition, SplitPlan};
use edgeclass_core::engine::{image_to_tensor, predict_tensor};
use edgeclass_core::eval::{confusion, cross_validate, metrics, ConfusionMatrix, MetricsReport};
use edgeclass_core::train::{attach_head, train_head as fit, FeatureExtractor, Loss, Samples, TrainConfig};
use edgeclass_core::{save_bundle, ModelBundle};
use serde::Serialize;

use super::{load_model, write_json};
use crate::failure::{self, Failure, Kind, Outcome};
use crate::{EvalArgs, HyperArgs, LossArg, TrainHeadArgs};

fn config(h: &HyperArgs, classes: usize) -> Outcome<TrainConfig> {
    if h.epochs == 0 || h.batch_size == 0 {
        return Err(Failure::usage("--epochs and --batch-size must be at least 1"));
    }
    if !(h.learning_rate.is_finite() && h.learning_rate > 0.0) {
        return Err(Failure::usage("--learning-rate must be positive"));
    }
    let loss = match h.loss {
        LossArg::Bce => Loss::BinaryCrossEntropy,
        LossArg::Cce => Loss::CategoricalCrossEntropy,
        LossArg::Auto if classes == 2 => Loss::BinaryCrossEntropy,
        LossArg::Auto => Loss::CategoricalCrossEntropy,
    };
    Ok(TrainConfig {
        epochs: h.epochs,
        batch_size: h.batch_size,
        learning_rate: h.learning_rate,
        loss,
        seed: h.seed,
        ..TrainConfig::default()
    })
}

fn load_plan(path: &Path, m: &DatasetManifest) -> Outcome<SplitPlan> {
    let text = failure::read_text(path)?;
    let plan: SplitPlan = serde_json::from_str(&text)
        .map_err(|e| Failure::new(Kind::Data, anyhow::anyhow!("{}: {e}", path.display())))?;
    if plan.assignments.len() != plan.folds || plan.assignments.iter().any(|a| a.len() != m.items.len()) {
        return Err(Failure::new(
            Kind::Data,
            anyhow::anyhow!("{} does not cover the {} manifest items", path.display(), m.items.len()),
        ));
    }
    Ok(plan)
}

fn check_fold(plan: &SplitPlan, fold: usize) -> Outcome {
    if fold >= plan.folds {
        return Err(Failure::usage(format!("--fold {fold} out of range for {} folds", plan.folds)));
    }
    Ok(())
}

fn features(b: &ModelBundle, m: &DatasetManifest, cache: Option<&Path>) -> Outcome<Vec<Vec<f32>>> {
    let mut fx = FeatureExtractor::new(b);
    if let Some(dir) = cache {
        fx = fx.with_cache(dir);
    }
    Ok(fx.extract(m)?)
}

fn pick(idx: &[usize], x: &[Vec<f32>], y: &[usize]) -> (Vec<Vec<f32>>, Vec<usize>) {
    idx.iter().map(|&i| (x[i].clone(), y[i])).unzip()
}

pub fn train_head(a: TrainHeadArgs) -> Outcome {
    let backbone = load_model(&a.backbone)?;
    let m = DatasetManifest::load(&a.manifest)?;
    let cfg = config(&a.hyper, m.classes.len())?;
    let x = features(&backbone, &m, a.hyper.cache.as_deref())?;
    let y = m.labels();
    let (head, log, test) = match &a.split {
        Some(path) => {
            let plan = load_plan(path, &m)?;
            check_fold(&plan, a.fold)?;
            let (tx, ty) = pick(&plan.indices(a.fold, Partition::Train), &x, &y);
            let (vx, vy) = pick(&plan.indices(a.fold, Partition::Val), &x, &y);
            let (sx, sy) = pick(&plan.indices(a.fold, Partition::Test), &x, &y);
            let val = (!vx.is_empty()).then(|| Samples::new(&vx, &vy)).transpose()?;
            let (head, log) = fit(Samples::new(&tx, &ty)?, val, m.classes.len(), &cfg)?;
            let correct = sx.iter().zip(&sy).filter(|(r, &l)| head.predict(r) == l).count();
            let test = (!sy.is_empty()).then(|| correct as f64 / sy.len() as f64);
            (head, log, test)
        }
        None => {
            let (head, log) = fit(Samples::new(&x, &y)?, None, m.classes.len(), &cfg)?;
            (head, log, None)
        }
    };
    let full = attach_head(&backbone, &head, &m.classes)?;
    save_bundle(&full, &a.out)?;
    if let Some(path) = &a.log {
        failure::write(path, log.to_table())?;
    }
    let best = log.records.iter().filter(|r| r.epoch == log.best_epoch).collect::<Vec<_>>();
    let shown: Vec<String> = best.iter().map(|r| format!("{} acc {:.4}", r.split, r.accuracy)).collect();
    println!("best epoch {} of {}: {}", log.best_epoch, cfg.epochs, shown.join(", "));
    if let Some(acc) = test {
        println!("test accuracy {acc:.4}");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ScoreReport {
    model: String,
    items: usize,
    confusion: ConfusionMatrix,
    metrics: MetricsReport,
}

pub fn eval(a: EvalArgs) -> Outcome {
    let b = load_model(&a.model)?;
    let m = DatasetManifest::load(&a.manifest)?;
    let plan = a.split.as_deref().map(|p| load_plan(p, &m)).transpose()?;

    if b.metadata.classes.is_empty() {
        let plan = plan.ok_or_else(|| Failure::usage("cross-validating a backbone needs --split"))?;
        let cfg = config(&a.hyper, m.classes.len())?;
        let x = features(&b, &m, a.hyper.cache.as_deref())?;
        let report = cross_validate(&x, &m.labels(), &m.classes, &plan, &cfg)?;
        print!("{}", report.to_table());
        if let Some(out) = &a.out {
            write_json(out, &report)?;
        }
        return Ok(());
    }

    let classes = &b.metadata.classes;
    let remap: Vec<usize> = m
        .classes
        .iter()
        .map(|c| classes.iter().position(|k| k == c))
        .collect::<Option<_>>()
        .ok_or_else(|| {
            Failure::new(
                Kind::Data,
                anyhow::anyhow!("manifest classes {:?} are not all known to the model {:?}", m.classes, classes),
            )
        })?;
    let items: Vec<usize> = match &plan {
        Some(p) => {
            check_fold(p, a.fold)?;
            p.indices(a.fold, Partition::Test)
        }
        None => (0..m.items.len()).collect(),
    };
    let mut actual = Vec::with_capacity(items.len());
    let mut predicted = Vec::with_capacity(items.len());
    for &i in &items {
        let img = m.load_image(i, &Default::default())?;
        let pred = predict_tensor(&b, &image_to_tensor(&img, &b.metadata.preprocess))?;
        actual.push(remap[m.items[i].class]);
        predicted.push(pred.class_index);
    }
    let cm = confusion(&actual, &predicted, classes.len())?.with_classes(classes);
    let report = ScoreReport {
        model: b.variant().id().to_string(),
        items: items.len(),
        metrics: metrics(&cm, b.metadata.positive_class.unwrap_or(0))?,
        confusion: cm,
    };
    print!("{}", report.confusion.to_grid());
    let r = &report.metrics;
    println!("accuracy {:.4}  precision {}  recall {}  f1 {}", r.accuracy, r.precision, r.recall, r.f1);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}
