use edgeclass_core::quant::{build_variants, variant_path, Method};
use edgeclass_core::{save_bundle, Variant};

use super::{collect_images, load_model, load_tensors, spread};
use crate::failure::{Failure, Outcome};
use crate::{CalibArg, PrecisionArg, QuantizeArgs};

pub fn quantize(a: QuantizeArgs) -> Outcome {
    let method = match a.calibration {
        CalibArg::Minmax => Method::MinMax,
        CalibArg::Percentile if a.percentile > 50.0 && a.percentile <= 100.0 => Method::Percentile(a.percentile),
        CalibArg::Percentile => return Err(Failure::usage("--percentile must be in (50, 100]")),
    };
    let original = load_model(&a.input)?;
    let paths = spread(&collect_images(&a.calib_dir)?, a.calib_count);
    let calib = load_tensors(&paths, &original.metadata.preprocess)?;
    let set = build_variants(&original, &calib, method, &a.exclude)?;
    let base = set.fp32opt.size().payload_bytes as f64;

    let written = match a.precision {
        PrecisionArg::All => {
            set.save(&a.out)?;
            vec![&set.fp32opt, &set.fp16, &set.int8]
        }
        one => {
            let b = match one {
                PrecisionArg::Fp32opt => &set.fp32opt,
                PrecisionArg::Fp16 => &set.fp16,
                _ => &set.int8,
            };
            save_bundle(b, &a.out)?;
            vec![b]
        }
    };
    println!("calibrated on {} images, {} nodes kept at fp32", calib.len(), set.plan.excluded.len());
    for b in written {
        let path = match a.precision {
            PrecisionArg::All => variant_path(&a.out, b.variant()),
            _ => a.out.clone(),
        };
        let payload = b.size().payload_bytes;
        println!(
            "{}\t{} B payload\tratio {:.4} vs fp32opt\t{}",
            b.variant().id(),
            payload,
            payload as f64 / base,
            path.display()
        );
    }
    if original.variant() == Variant::Fp32 {
        let o = original.size().payload_bytes;
        println!("original\t{o} B payload");
    }
    Ok(())
}
