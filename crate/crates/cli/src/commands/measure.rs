use edgeclass_core::bench::{bench as time_variant, compare_variants, parse_power_log, power_report, BenchConfig, Window};
use edgeclass_core::data::{synth_image, SynthClass};
use edgeclass_core::engine::image_to_tensor;
use edgeclass_core::predict;
use edgeclass_gateway::Server;
use serde::Serialize;

use super::{collect_images, load_model, load_tensors, write_json};
use crate::failure::{self, Failure, Kind, Outcome, OrFail};
use crate::{BenchArgs, InferArgs, PowerArgs};

#[derive(Serialize)]
struct InferReport<'a> {
    model: &'a str,
    label: &'a str,
    class_index: usize,
    confidence: f32,
}

pub fn infer(a: InferArgs) -> Outcome {
    let b = load_model(&a.model)?;
    let bytes = failure::read(&a.image)?;
    let p = predict(&b, &bytes)?;
    println!("{} {:.2}%", p.label, p.confidence * 100.0);
    if let Some(out) = &a.out {
        let report = InferReport {
            model: b.variant().id(),
            label: &p.label,
            class_index: p.class_index,
            confidence: p.confidence,
        };
        write_json(out, &report)?;
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> Outcome {
    let cfg = BenchConfig {
        batch_size: a.batch_size,
        warmup: a.warmup,
        reps: a.reps,
    };
    let paths = match (&a.images, a.synth) {
        (Some(dir), _) => Some(collect_images(dir)?),
        (None, Some(0)) => return Err(Failure::usage("--synth must be at least 1")),
        (None, Some(_)) => None,
        (None, None) => return Err(Failure::usage("give --images or --synth")),
    };
    let mut reports = Vec::new();
    for path in &a.model {
        let b = load_model(path)?;
        let spec = b.metadata.preprocess;
        let images = match (&paths, a.synth) {
            (Some(p), _) => load_tensors(p, &spec)?,
            (None, n) => (0..n.unwrap_or(0) as u64)
                .map(|i| {
                    let class = if i % 2 == 0 { SynthClass::Monkeypox } else { SynthClass::Others };
                    image_to_tensor(&synth_image(class, a.seed.wrapping_add(i), spec.height as u32), &spec)
                })
                .collect(),
        };
        reports.push(time_variant(&b, b.variant().id(), Some(b.size()), &images, &cfg)?);
    }
    if reports.len() == 1 {
        let r = &reports[0];
        println!("variant\tbatches/pass\tms/batch\tms/image\timg/s");
        println!(
            "{}\t{}\t{:.3}\t{:.3}\t{:.1}",
            r.variant, r.batches_per_pass, r.ms_per_batch, r.ms_per_image, r.images_per_second
        );
        if let Some(out) = &a.out {
            write_json(out, &reports)?;
        }
        return Ok(());
    }
    let cmp = compare_variants(&reports, &a.original)?;
    print!("{}", cmp.to_table());
    if let Some(out) = &a.out {
        write_json(out, &cmp)?;
    }
    Ok(())
}

pub fn power(a: PowerArgs) -> Outcome {
    let windows: Vec<Window> = a
        .windows
        .iter()
        .map(|w| w.parse::<Window>())
        .collect::<Result<_, _>>()
        .or_fail(Kind::Usage)?;
    let samples = parse_power_log(&failure::read_text(&a.log)?)?;
    let report = power_report(&samples, &windows)?;
    println!("idle {:.3} W", report.idle_watts);
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

pub fn serve(a: edgeclass_gateway::ServeArgs) -> Outcome {
    let rt = tokio::runtime::Runtime::new().or_fail(Kind::Internal)?;
    rt.block_on(async {
        let server = Server::bind(&a).await?;
        println!(
            "serving {} variants from {} on http://{}",
            server.variant_count(),
            a.models_dir.display(),
            server.local_addr()
        );
        server.run().await?;
        Ok(())
    })
}
