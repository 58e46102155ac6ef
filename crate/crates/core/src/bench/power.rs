//! Watt logs: one sample per line, `<ISO-8601 timestamp>, <watts>`.
//! Blank lines and lines starting with `#` are ignored. Timestamps without
//! an offset are read as UTC.

use std::fmt::Write as _;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("window `{0}` must be written name=start/end with ISO-8601 bounds")]
    BadWindow(String),
    #[error("window `{name}` holds {count} samples; at least 3 are required")]
    EmptyWindow { name: String, count: usize },
    #[error("windows `{0}` and `{1}` overlap")]
    Overlap(String, String),
    #[error("missing `{0}` window")]
    MissingWindow(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerSample {
    pub timestamp: DateTime<Utc>,
    pub watts: f64,
}

fn parse_time(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .ok()
        .or_else(|| {
            NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
                .ok()
                .map(|t| t.and_utc())
        })
}

pub fn parse_power_log(text: &str) -> Result<Vec<PowerSample>, PowerError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| PowerError::Parse {
            line: i + 1,
            reason: reason.to_string(),
        };
        let (ts, w) = line.split_once(',').ok_or_else(|| err("expected `timestamp, watts`"))?;
        let timestamp = parse_time(ts).ok_or_else(|| err("bad ISO-8601 timestamp"))?;
        let watts: f64 = w.trim().parse().map_err(|_| err("bad watts value"))?;
        if !(watts > 0.0 && watts.is_finite()) {
            return Err(err("watts must be positive"));
        }
        out.push(PowerSample { timestamp, watts });
    }
    Ok(out)
}

/// Inclusive time interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Window {
    pub name: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl std::str::FromStr for Window {
    type Err = PowerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PowerError::BadWindow(s.to_string());
        let (name, range) = s.split_once('=').ok_or_else(bad)?;
        let (a, b) = range.split_once('/').ok_or_else(bad)?;
        let (start, end) = (parse_time(a).ok_or_else(bad)?, parse_time(b).ok_or_else(bad)?);
        if name.is_empty() || end < start {
            return Err(bad());
        }
        Ok(Window {
            name: name.to_string(),
            start,
            end,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowStats {
    pub name: String,
    pub samples: usize,
    pub mean_watts: f64,
    /// `mean / original mean`; absent for the idle window.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerReport {
    pub idle_watts: f64,
    pub windows: Vec<WindowStats>,
}

impl PowerReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("window\tsamples\tmean_W\tratio\n");
        for w in &self.windows {
            let ratio = w.ratio.map_or("-".into(), |r| format!("{r:.2}"));
            let _ = writeln!(s, "{}\t{}\t{:.3}\t{ratio}", w.name, w.samples, w.mean_watts);
        }
        s
    }
}

/// Mean watts per window. Requires windows named `idle` and `original`;
/// every other window is a variant and gets `variant / original`.
pub fn power_report(samples: &[PowerSample], windows: &[Window]) -> Result<PowerReport, PowerError> {
    for (i, a) in windows.iter().enumerate() {
        for b in &windows[i + 1..] {
            if a.start <= b.end && b.start <= a.end {
                return Err(PowerError::Overlap(a.name.clone(), b.name.clone()));
            }
        }
    }
    let stats: Vec<(String, usize, f64)> = windows
        .iter()
        .map(|w| {
            let inside: Vec<f64> = samples
                .iter()
                .filter(|s| s.timestamp >= w.start && s.timestamp <= w.end)
                .map(|s| s.watts)
                .collect();
            if inside.len() < 3 {
                return Err(PowerError::EmptyWindow {
                    name: w.name.clone(),
                    count: inside.len(),
                });
            }
            Ok((w.name.clone(), inside.len(), inside.iter().sum::<f64>() / inside.len() as f64))
        })
        .collect::<Result<_, _>>()?;
    let find = |name: &'static str| {
        stats
            .iter()
            .find(|s| s.0 == name)
            .map(|s| s.2)
            .ok_or(PowerError::MissingWindow(name))
    };
    let idle_watts = find("idle")?;
    let original = find("original")?;
    Ok(PowerReport {
        idle_watts,
        windows: stats
            .into_iter()
            .map(|(name, samples, mean_watts)| WindowStats {
                ratio: (name != "idle").then_some(mean_watts / original),
                name,
                samples,
                mean_watts,
            })
            .collect(),
    })
}
