//! Bandwidth forecasting from measured per-slot download samples.
//!
//! Two estimators are provided over the most recent smoothing window: a
//! plain arithmetic mean and an exponentially weighted moving average
//! seeded with the window's first sample.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("cold start: no bandwidth samples before slot {0}")]
    ColdStart(u64),
    #[error("ewma factor must lie in (0, 1], got {0}")]
    InvalidFactor(f64),
    #[error("forecast window must be at least one slot")]
    EmptyWindow,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sample slot {slot} does not follow slot {previous}")]
    NonMonotone { previous: u64, slot: u64 },
    #[error("sample at slot {slot} has invalid bandwidth {kbps}")]
    InvalidValue { slot: u64, kbps: f64 },
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub slot: u64,
    pub kbps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSource {
    Measured,
    File,
    Generated,
}

/// Time series of download bandwidth samples, strictly increasing in slot.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    samples: Vec<Sample>,
    source: TraceSource,
}

impl BandwidthTrace {
    pub fn new(source: TraceSource) -> Self {
        Self { samples: Vec::new(), source }
    }

    pub fn from_samples(samples: Vec<(u64, f64)>, source: TraceSource) -> Result<Self, ForecastError> {
        let mut trace = Self::new(source);
        for (slot, kbps) in samples {
            trace.push(slot, kbps)?;
        }
        Ok(trace)
    }

    pub fn push(&mut self, slot: u64, kbps: f64) -> Result<(), ForecastError> {
        if !(kbps >= 0.0 && kbps.is_finite()) {
            return Err(ForecastError::InvalidValue { slot, kbps });
        }
        if let Some(last) = self.samples.last() {
            if slot <= last.slot {
                return Err(ForecastError::NonMonotone { previous: last.slot, slot });
            }
        }
        self.samples.push(Sample { slot, kbps });
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn source(&self) -> TraceSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The most recent `count` samples strictly before `now`.
    pub fn window_before(&self, now: u64, count: usize) -> &[Sample] {
        let end = self.samples.partition_point(|s| s.slot < now);
        &self.samples[end.saturating_sub(count)..end]
    }

    /// Most recent sample strictly before `now`.
    pub fn last_before(&self, now: u64) -> Option<Sample> {
        self.window_before(now, 1).first().copied()
    }

    /// Value in force at `slot`: the latest sample at or before it, or the
    /// first sample for earlier slots.
    pub fn value_at(&self, slot: u64) -> Option<f64> {
        let idx = self.samples.partition_point(|s| s.slot <= slot);
        match idx {
            0 => self.samples.first().map(|s| s.kbps),
            i => Some(self.samples[i - 1].kbps),
        }
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.samples.iter().fold(None, |acc, s| match acc {
            None => Some((s.kbps, s.kbps)),
            Some((lo, hi)) => Some((lo.min(s.kbps), hi.max(s.kbps))),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot,kbps\n");
        for s in &self.samples {
            out.push_str(&format!("{},{}\n", s.slot, s.kbps));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    WindowMean,
    /// Exponentially weighted moving average with smoothing factor λ.
    Ewma(f64),
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::WindowMean => f.write_str("window-mean"),
            Estimator::Ewma(_) => f.write_str("ewma"),
        }
    }
}

pub const DEFAULT_EWMA_FACTOR: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastConfig {
    pub estimator: Estimator,
    /// Number of past slots considered (`S_W`).
    pub window: u32,
}

impl ForecastConfig {
    pub fn window_mean(window: u32) -> Self {
        Self { estimator: Estimator::WindowMean, window }
    }

    pub fn ewma(factor: f64, window: u32) -> Self {
        Self { estimator: Estimator::Ewma(factor), window }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        if self.window == 0 {
            return Err(ForecastError::EmptyWindow);
        }
        if let Estimator::Ewma(factor) = self.estimator {
            if !(factor > 0.0 && factor <= 1.0) {
                return Err(ForecastError::InvalidFactor(factor));
            }
        }
        Ok(())
    }
}

/// Forecast the bandwidth at slot `now` from the last `window` samples
/// measured before it. Fewer samples than the window are all used.
pub fn estimate_next(trace: &BandwidthTrace, cfg: &ForecastConfig, now: u64) -> Result<f64, ForecastError> {
    cfg.validate()?;
    let window = trace.window_before(now, cfg.window as usize);
    if window.is_empty() {
        return Err(ForecastError::ColdStart(now));
    }
    Ok(match cfg.estimator {
        Estimator::WindowMean => window.iter().map(|s| s.kbps).sum::<f64>() / window.len() as f64,
        Estimator::Ewma(factor) => {
            let mut value = window[0].kbps;
            for s in &window[1..] {
                value = factor * s.kbps + (1.0 - factor) * value;
            }
            value
        }
    })
}

/// Parse `slot,kbps` rows; a non-numeric first line is taken as a header.
pub fn parse_trace(text: &str) -> Result<BandwidthTrace, ForecastError> {
    let mut trace = BandwidthTrace::new(TraceSource::File);
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let mut fields = row.split(',').map(str::trim);
        let (Some(slot), Some(kbps), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(ForecastError::Parse { line, message: format!("expected `slot,kbps`, got `{row}`") });
        };
        let slot = match u64::from_str(slot) {
            Ok(s) => s,
            Err(_) if trace.is_empty() && idx == 0 => continue,
            Err(_) => return Err(ForecastError::Parse { line, message: format!("bad slot `{slot}`") }),
        };
        let kbps = f64::from_str(kbps)
            .map_err(|_| ForecastError::Parse { line, message: format!("bad bandwidth `{kbps}`") })?;
        trace.push(slot, kbps).map_err(|e| ForecastError::Parse { line, message: e.to_string() })?;
    }
    Ok(trace)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<BandwidthTrace, ForecastError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| ForecastError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_trace(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(values: &[f64]) -> BandwidthTrace {
        BandwidthTrace::from_samples(values.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect(), TraceSource::Measured)
            .unwrap()
    }

    #[test]
    fn constant_trace_is_a_fixed_point() {
        let t = trace(&[500.0; 20]);
        for cfg in [ForecastConfig::window_mean(5), ForecastConfig::ewma(0.25, 5)] {
            assert_eq!(estimate_next(&t, &cfg, 20).unwrap(), 500.0);
        }
    }

    #[test]
    fn window_mean_example() {
        let t = trace(&[300.0, 600.0, 900.0]);
        assert_eq!(estimate_next(&t, &ForecastConfig::window_mean(3), 3).unwrap(), 600.0);
    }

    #[test]
    fn ewma_example() {
        let t = trace(&[400.0, 800.0]);
        // 0.5 * 800 + 0.5 * 400
        assert_eq!(estimate_next(&t, &ForecastConfig::ewma(0.5, 2), 2).unwrap(), 600.0);
    }

    #[test]
    fn only_samples_before_now_count() {
        let t = trace(&[100.0, 200.0, 900.0]);
        assert_eq!(estimate_next(&t, &ForecastConfig::window_mean(5), 2).unwrap(), 150.0);
        assert_eq!(estimate_next(&t, &ForecastConfig::window_mean(5), 0), Err(ForecastError::ColdStart(0)));
    }

    #[test]
    fn config_validation() {
        let t = trace(&[1.0]);
        assert_eq!(estimate_next(&t, &ForecastConfig::ewma(0.0, 3), 1), Err(ForecastError::InvalidFactor(0.0)));
        assert_eq!(estimate_next(&t, &ForecastConfig::ewma(1.5, 3), 1), Err(ForecastError::InvalidFactor(1.5)));
        assert_eq!(estimate_next(&t, &ForecastConfig::window_mean(0), 1), Err(ForecastError::EmptyWindow));
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_trace("0,100\n1,200").unwrap().len(), 2);
        assert_eq!(parse_trace("slot,kbps\n0,100\n1,200\n").unwrap().len(), 2);
        let err = parse_trace("1,100\n0,200").unwrap_err();
        assert!(matches!(err, ForecastError::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("does not follow"));
        assert!(matches!(parse_trace("0,100\n1,-5"), Err(ForecastError::Parse { line: 2, .. })));
        assert!(matches!(parse_trace("0,100\n1"), Err(ForecastError::Parse { line: 2, .. })));
        assert!(matches!(parse_trace("0,100\nx,5"), Err(ForecastError::Parse { line: 2, .. })));
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        std::fs::write(&path, "slot,kbps\n0,100\n5,250.5\n").unwrap();
        let t = load_trace(&path).unwrap();
        assert_eq!(t.samples()[1], Sample { slot: 5, kbps: 250.5 });
        assert_eq!(t.source(), TraceSource::File);
        assert!(matches!(load_trace(dir.path().join("missing.csv")), Err(ForecastError::Io { .. })));
    }

    proptest! {
        #[test]
        fn estimators_are_bounded_and_scale(
            values in proptest::collection::vec(0.0f64..2000.0, 1..40),
            window in 1u32..20,
            factor in 0.01f64..=1.0,
            scale in 0.1f64..10.0,
        ) {
            let t = trace(&values);
            let now = values.len() as u64;
            let used = &values[values.len().saturating_sub(window as usize)..];
            let lo = used.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = used.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let scaled = trace(&values.iter().map(|v| v * scale).collect::<Vec<_>>());
            for cfg in [ForecastConfig::window_mean(window), ForecastConfig::ewma(factor, window)] {
                let est = estimate_next(&t, &cfg, now).unwrap();
                prop_assert!(est >= lo - 1e-9 && est <= hi + 1e-9);
                let est_scaled = estimate_next(&scaled, &cfg, now).unwrap();
                prop_assert!((est_scaled - scale * est).abs() <= 1e-9 * (1.0 + est_scaled.abs()));
            }
            let last = *values.last().unwrap();
            for cfg in [ForecastConfig::window_mean(1), ForecastConfig::ewma(factor, 1)] {
                prop_assert_eq!(estimate_next(&t, &cfg, now).unwrap(), last);
            }
        }
    }
}
