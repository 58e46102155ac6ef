use std::collections::BTreeMap;
use std::path::Path;

use edgeclass_core::bundle::SizeReport;
use edgeclass_core::fixture::micro_mobilenet;
use edgeclass_core::{run_outputs, save_bundle, Metadata, OpCensus, Tensor};
use serde::Serialize;

use super::{load_model, write_json};
use crate::failure::{Kind, Outcome, OrFail};

#[derive(Serialize)]
struct Inspection<'a> {
    metadata: &'a Metadata,
    checksum: String,
    size: SizeReport,
    census: OpCensus,
    shapes: BTreeMap<String, Vec<usize>>,
}

pub fn inspect(path: &Path, out: Option<&Path>) -> Outcome {
    let b = load_model(path)?;
    let shapes = b.shapes().or_fail(Kind::Model)?;
    let report = Inspection {
        metadata: &b.metadata,
        checksum: b.checksum_hex(),
        size: b.size(),
        census: b.census(),
        shapes,
    };
    let m = &b.metadata;
    println!("name       {}", m.name);
    println!("variant    {}", b.variant().id());
    println!("classes    {}", if m.classes.is_empty() { "-".to_string() } else { m.classes.join(", ") });
    println!("input      {}x{}x3 {:?}", m.preprocess.height, m.preprocess.width, m.preprocess.range);
    println!("checksum   {}", report.checksum);
    println!("container  {} B", report.size.container_bytes);
    println!("payload    {} B", report.size.payload_bytes);
    println!("{}", report.census);
    if let Some(out) = out {
        write_json(out, &report)?;
    }
    Ok(())
}

pub fn validate(path: &Path) -> Outcome {
    let b = load_model(path)?;
    let p = &b.metadata.preprocess;
    let zeros = Tensor::zeros(vec![1, p.height, p.width, 3]).or_fail(Kind::Internal)?;
    let outputs = run_outputs(&b, &zeros)?;
    let shapes: Vec<String> = outputs.iter().map(|t| format!("{:?}", t.shape())).collect();
    println!("ok: {} ({}), outputs {}", path.display(), b.variant().id(), shapes.join(" "));
    Ok(())
}

pub fn fixture(out: &Path, seed: u64) -> Outcome {
    let b = micro_mobilenet(seed);
    save_bundle(&b, out)?;
    let s = b.size();
    println!("wrote {} ({} nodes, {} payload bytes)", out.display(), b.census().total(), s.payload_bytes);
    Ok(())
}
