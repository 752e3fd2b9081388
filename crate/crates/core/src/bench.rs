//! Latency measurement at batch size 1.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub warmup_iters: usize,
    pub timed_iters: usize,
    /// Wall-clock latency of each timed iteration, in milliseconds.
    pub latencies_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub fps: f64,
    /// Standard deviation over mean.
    pub cov: f64,
    pub single_threaded: bool,
    pub bn_folded: bool,
}

pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_ITERS: usize = 30;

impl BenchReport {
    pub fn from_latencies(warmup_iters: usize, latencies_ms: Vec<f64>, single_threaded: bool, bn_folded: bool) -> Result<Self> {
        if latencies_ms.is_empty() || !latencies_ms.iter().all(|&v| v.is_finite() && v >= 0.0) {
            return Err(Error::invalid("bench", "need at least one finite latency"));
        }
        let n = latencies_ms.len() as f64;
        let mean = latencies_ms.iter().sum::<f64>() / n;
        let var = latencies_ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = latencies_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        } else {
            sorted[mid]
        };
        Ok(BenchReport {
            warmup_iters,
            timed_iters: latencies_ms.len(),
            mean_ms: mean,
            median_ms: median,
            min_ms: sorted[0],
            fps: 1000.0 / mean,
            cov: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
            latencies_ms,
            single_threaded,
            bn_folded,
        })
    }
}

/// Runs `f` `warmup` times untimed, then `iters` times timed.
pub fn time_iterations<F>(warmup: usize, iters: usize, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut() -> Result<()>,
{
    if iters == 0 {
        return Err(Error::invalid("bench", "timed iterations must be at least 1"));
    }
    for _ in 0..warmup {
        f()?;
    }
    (0..iters)
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "threads: {}  bn folded: {}  warmup: {}  timed: {}",
            if self.single_threaded { "single" } else { "pool" },
            self.bn_folded,
            self.warmup_iters,
            self.timed_iters
        )?;
        writeln!(
            f,
            "latency ms  mean {:.3}  median {:.3}  min {:.3}  cov {:.3}",
            self.mean_ms, self.median_ms, self.min_ms, self.cov
        )?;
        write!(f, "fps {:.3}", self.fps)
    }
}
