//! Shared inputs for the criterion benches.

use edgeclass_core::data::{synth_image, SynthClass};
use edgeclass_core::engine::image_to_tensor;
use edgeclass_core::fixture::micro_mobilenet;
use edgeclass_core::quant::{build_variants, Method};
use edgeclass_core::{ModelBundle, Tensor};

/// `n` synthetic images, alternating classes, preprocessed for `b`.
pub fn images(b: &ModelBundle, n: usize, seed: u64) -> Vec<Tensor> {
    let spec = b.metadata.preprocess;
    (0..n as u64)
        .map(|i| {
            let class = if i % 2 == 0 { SynthClass::Monkeypox } else { SynthClass::Others };
            image_to_tensor(&synth_image(class, seed + i, spec.height as u32), &spec)
        })
        .collect()
}

/// The fixture backbone and its three derived variants, in registry order.
pub fn variants(seed: u64) -> Vec<ModelBundle> {
    let original = micro_mobilenet(seed);
    let calib = images(&original, 16, seed);
    let set = build_variants(&original, &calib, Method::MinMax, &[] as &[&str]).expect("fixture quantizes");
    vec![original, set.fp32opt, set.fp16, set.int8]
}
