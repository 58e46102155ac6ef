//! Latency/throughput measurement per variant and watt-log power reports.

mod power;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::bundle::{ModelBundle, SizeReport};
use crate::engine::{run_outputs, stack_batch, EngineError};
use crate::tensor::Tensor;

pub use power::{parse_power_log, power_report, PowerError, PowerReport, PowerSample, Window, WindowStats};

/// Something that can execute one batch.
pub trait BatchRunner: Sync {
    fn run_batch(&self, batch: &Tensor) -> Result<(), EngineError>;
}

impl BatchRunner for ModelBundle {
    fn run_batch(&self, batch: &Tensor) -> Result<(), EngineError> {
        run_outputs(self, batch).map(drop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BenchConfig {
    pub batch_size: usize,
    /// Discarded full passes before timing.
    pub warmup: usize,
    /// Timed full passes.
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_size: 32,
            warmup: 3,
            reps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub variant: String,
    pub container_bytes: Option<usize>,
    pub payload_bytes: Option<usize>,
    pub batch_size: usize,
    pub image_count: usize,
    pub batches_per_pass: usize,
    pub warmup: usize,
    pub reps: usize,
    pub total_seconds: f64,
    pub ms_per_batch: f64,
    pub ms_per_image: f64,
    pub images_per_second: f64,
    /// Set when an inference error cut the run short.
    pub partial: bool,
}

impl BenchReport {
    /// `throughput · per-image latency`, 1 for a consistent report.
    pub fn consistency(&self) -> f64 {
        self.images_per_second * self.ms_per_image / 1e3
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no images to benchmark")]
    NoImages,
    #[error("batch size, warmup and reps must all be at least 1")]
    BadConfig,
    #[error("images have mismatched shapes")]
    Ragged,
    #[error("inference failed after {} timed batches: {source}", partial.reps)]
    Aborted {
        partial: Box<BenchReport>,
        #[source]
        source: EngineError,
    },
    #[error("missing original report `{0}`")]
    MissingOriginal(String),
    #[error("need at least two reports")]
    TooFewReports,
}

pub fn batch_count(images: usize, batch_size: usize) -> usize {
    images.div_ceil(batch_size)
}

/// Times `reps` full passes over `images` (each `(1, H, W, C)`) after
/// `warmup` discarded passes. Batches are assembled before timing.
pub fn bench<R: BatchRunner + ?Sized>(
    runner: &R,
    variant: &str,
    size: Option<SizeReport>,
    images: &[Tensor],
    cfg: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    if images.is_empty() {
        return Err(BenchError::NoImages);
    }
    if cfg.batch_size == 0 || cfg.warmup == 0 || cfg.reps == 0 {
        return Err(BenchError::BadConfig);
    }
    let batches: Vec<Tensor> = images
        .chunks(cfg.batch_size)
        .map(stack_batch)
        .collect::<Option<_>>()
        .ok_or(BenchError::Ragged)?;
    let mut report = BenchReport {
        variant: variant.to_string(),
        container_bytes: size.map(|s| s.container_bytes),
        payload_bytes: size.map(|s| s.payload_bytes),
        batch_size: cfg.batch_size,
        image_count: images.len(),
        batches_per_pass: batches.len(),
        warmup: cfg.warmup,
        reps: 0,
        total_seconds: 0.0,
        ms_per_batch: 0.0,
        ms_per_image: 0.0,
        images_per_second: 0.0,
        partial: false,
    };
    let abort = |mut r: BenchReport, source| {
        r.partial = true;
        BenchError::Aborted {
            partial: Box::new(r),
            source,
        }
    };
    for _ in 0..cfg.warmup {
        for b in &batches {
            if let Err(e) = runner.run_batch(b) {
                return Err(abort(report, e));
            }
        }
    }
    let mut total = Duration::ZERO;
    for _ in 0..cfg.reps {
        for b in &batches {
            let start = Instant::now();
            let r = runner.run_batch(b);
            total += start.elapsed();
            if let Err(e) = r {
                report.total_seconds = total.as_secs_f64();
                return Err(abort(report, e));
            }
        }
        report.reps += 1;
    }
    let secs = total.as_secs_f64();
    let (reps, n) = (report.reps as f64, images.len() as f64);
    report.total_seconds = secs;
    report.ms_per_batch = secs * 1e3 / (reps * batches.len() as f64);
    report.ms_per_image = secs * 1e3 / (reps * n);
    report.images_per_second = reps * n / secs;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub variant: String,
    pub container_ratio: Option<f64>,
    pub payload_ratio: Option<f64>,
    pub latency_ratio: f64,
    pub throughput_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub original: String,
    pub reports: Vec<BenchReport>,
    pub rows: Vec<RatioRow>,
}

/// Ratios of each report against the one named `original` (variant / original).
pub fn compare_variants(reports: &[BenchReport], original: &str) -> Result<Comparison, BenchError> {
    if reports.len() < 2 {
        return Err(BenchError::TooFewReports);
    }
    let base = reports
        .iter()
        .find(|r| r.variant == original)
        .ok_or_else(|| BenchError::MissingOriginal(original.to_string()))?;
    let div = |a: Option<usize>, b: Option<usize>| Some(a? as f64 / b? as f64);
    let rows = reports
        .iter()
        .map(|r| RatioRow {
            variant: r.variant.clone(),
            container_ratio: div(r.container_bytes, base.container_bytes),
            payload_ratio: div(r.payload_bytes, base.payload_bytes),
            latency_ratio: r.ms_per_image / base.ms_per_image,
            throughput_ratio: r.images_per_second / base.images_per_second,
        })
        .collect();
    Ok(Comparison {
        original: original.to_string(),
        reports: reports.to_vec(),
        rows,
    })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut s = String::from(
            "variant\tcontainer_B\tpayload_B\tms/batch\tms/image\timg/s\tcontainer_x\tpayload_x\tlatency_x\tthroughput_x\n",
        );
        let opt = |v: Option<usize>| v.map_or("-".into(), |v| v.to_string());
        let ratio = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.3}"));
        for (r, row) in self.reports.iter().zip(&self.rows) {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.3}\t{:.3}\t{:.1}\t{}\t{}\t{:.3}\t{:.3}",
                r.variant,
                opt(r.container_bytes),
                opt(r.payload_bytes),
                r.ms_per_batch,
                r.ms_per_image,
                r.images_per_second,
                ratio(row.container_ratio),
                ratio(row.payload_ratio),
                row.latency_ratio,
                row.throughput_ratio
            );
        }
        s
    }
}
