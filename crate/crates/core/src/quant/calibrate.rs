use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::QuantError;
use crate::bundle::{ModelBundle, Variant};
use crate::engine::run_forward;
use crate::tensor::Tensor;

/// Observed range of one activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f32,
    pub max: f32,
    pub samples: usize,
}

impl Range {
    pub fn merge(self, other: Range) -> Range {
        Range {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
            samples: self.samples + other.samples,
        }
    }

    pub fn width(&self) -> f32 {
        self.max - self.min
    }

    /// Symmetric INT8 scale covering the range.
    pub fn scale(&self) -> f32 {
        self.min.abs().max(self.max.abs()).max(1e-8) / 127.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Method {
    #[default]
    MinMax,
    /// Per-sample symmetric percentile (e.g. 99.9) instead of the extrema.
    Percentile(f64),
}

/// Per-node activation ranges keyed by node id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub ranges: BTreeMap<String, Range>,
}

impl CalibrationProfile {
    pub fn get(&self, id: &str) -> Option<&Range> {
        self.ranges.get(id)
    }

    /// Min/max merge; associative and commutative.
    pub fn merge(mut self, other: CalibrationProfile) -> CalibrationProfile {
        for (k, r) in other.ranges {
            self.ranges
                .entry(k)
                .and_modify(|e| *e = e.merge(r))
                .or_insert(r);
        }
        self
    }

    /// Tab-separated table: `node  min  max  samples`, one row per node.
    pub fn to_table(&self) -> String {
        let mut s = String::from("# node\tmin\tmax\tsamples\n");
        for (k, r) in &self.ranges {
            let _ = writeln!(s, "{k}\t{}\t{}\t{}", r.min, r.max, r.samples);
        }
        s
    }

    pub fn from_table(text: &str) -> Result<CalibrationProfile, QuantError> {
        let mut ranges = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || QuantError::ProfileSyntax { line: i + 1 };
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, min, max, samples] = cols[..] else { return Err(bad()) };
            let r = Range {
                min: min.parse().map_err(|_| bad())?,
                max: max.parse().map_err(|_| bad())?,
                samples: samples.parse().map_err(|_| bad())?,
            };
            ranges.insert(id.to_string(), r);
        }
        Ok(CalibrationProfile { ranges })
    }
}

fn sample_range(values: &[f32], method: Method) -> (f32, f32) {
    match method {
        Method::MinMax => values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        Method::Percentile(p) => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f32::total_cmp);
            let last = sorted.len() - 1;
            let hi = ((p / 100.0) * last as f64).round() as usize;
            let lo = last - hi;
            (sorted[lo], sorted[hi])
        }
    }
}

fn profile_one(b: &ModelBundle, image: &Tensor, method: Method) -> Result<CalibrationProfile, QuantError> {
    let samples = image.shape().first().copied().unwrap_or(1);
    let ranges = run_forward(b, image)?
        .into_iter()
        .filter(|(_, t)| !t.is_empty())
        .map(|(id, t)| {
            let (min, max) = sample_range(&t.to_f32_vec(), method);
            (id, Range { min, max, samples })
        })
        .collect();
    Ok(CalibrationProfile { ranges })
}

/// Runs every image through an FP32 bundle, recording each activation's
/// range. Forwards run in parallel; merging is order-independent.
pub fn calibrate(b: &ModelBundle, images: &[Tensor], method: Method) -> Result<CalibrationProfile, QuantError> {
    if !matches!(b.variant(), Variant::Fp32 | Variant::Fp32Opt) {
        return Err(QuantError::NotFp32(b.variant()));
    }
    if images.is_empty() {
        return Err(QuantError::EmptyDataset);
    }
    images
        .par_iter()
        .map(|img| profile_one(b, img, method))
        .try_reduce(CalibrationProfile::default, |a, b| Ok(a.merge(b)))
}
