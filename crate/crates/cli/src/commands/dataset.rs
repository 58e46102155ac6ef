use std::path::Path;

use edgeclass_core::data::{self, DatasetManifest, Partition};

use super::write_json;
use crate::failure::{Failure, Outcome};

fn counts(m: &DatasetManifest) -> String {
    m.classes
        .iter()
        .zip(m.class_counts())
        .map(|(c, n)| format!("{c}={n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn ingest(root: &Path, out: &Path) -> Outcome {
    let (m, report) = data::ingest(root)?;
    for (path, reason) in &report.skipped {
        log::warn!("skipped {}: {reason}", path.display());
    }
    m.save(out)?;
    println!("{} items ({}), {} skipped", m.items.len(), counts(&m), report.skipped.len());
    Ok(())
}

pub fn synth(out: &Path, per_class: usize, size: u32, seed: u64) -> Outcome {
    if per_class == 0 || size == 0 {
        return Err(Failure::usage("--per-class and --size must be at least 1"));
    }
    let m = data::synth_dataset(out, per_class, size, seed)?;
    let manifest = out.join("manifest.tsv");
    m.save(&manifest)?;
    println!("{} items ({}) in {}", m.items.len(), counts(&m), out.display());
    Ok(())
}

pub fn augment(manifest: &Path, factor: usize, seed: u64, out: &Path) -> Outcome {
    let m = DatasetManifest::load(manifest)?;
    let a = data::augment(&m, factor, seed)?;
    a.save(out)?;
    println!("{} -> {} items ({})", m.items.len(), a.items.len(), counts(&a));
    Ok(())
}

pub fn split(manifest: &Path, folds: usize, seed: u64, out: &Path) -> Outcome {
    let m = DatasetManifest::load(manifest)?;
    let plan = data::split(&m, folds, seed)?;
    write_json(out, &plan)?;
    println!("fold\ttrain\tval\ttest");
    for f in 0..plan.folds {
        let n = |p| plan.indices(f, p).len();
        println!("{f}\t{}\t{}\t{}", n(Partition::Train), n(Partition::Val), n(Partition::Test));
    }
    Ok(())
}
