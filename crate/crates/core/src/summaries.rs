//! Sliding-window latency statistics.
//!
//! Each server keeps the `W` most recent per-frame latencies. The summary is
//! always recomputed from the window contents, so it is exactly the
//! arithmetic mean and the sample (divisor `n - 1`) standard deviation of
//! whatever is currently held, including during warm-up when fewer than `W`
//! samples exist.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default window length in frames.
pub const DEFAULT_WINDOW: usize = 20;

fn check_latency(value: f64) -> Result<()> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::validation(format!(
            "latency must be finite and > 0, got {value}"
        )));
    }
    Ok(())
}

/// One observed latency for one server at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub frame_index: u64,
    pub server_id: usize,
    /// Seconds.
    pub latency: f64,
}

impl LatencySample {
    pub fn new(frame_index: u64, server_id: usize, latency: f64) -> Result<Self> {
        check_latency(latency)?;
        Ok(Self {
            frame_index,
            server_id,
            latency,
        })
    }
}

/// Windowed mean / deviation pair for one server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Seconds.
    pub mean: f64,
    /// Sample standard deviation in seconds; `None` while `count < 2`.
    pub deviation: Option<f64>,
    pub count: usize,
}

impl Summary {
    /// Builds a summary from known moments. Used by callers that already hold
    /// `(mean, deviation)` pairs rather than raw samples.
    pub fn from_moments(mean: f64, deviation: f64, count: usize) -> Result<Self> {
        if !mean.is_finite() || !deviation.is_finite() || deviation < 0.0 {
            return Err(Error::validation(format!(
                "summary needs finite mean and deviation >= 0, got ({mean}, {deviation})"
            )));
        }
        if count < 2 {
            return Err(Error::InsufficientSamples { count });
        }
        Ok(Self {
            mean,
            deviation: Some(deviation),
            count,
        })
    }

    pub fn is_defined(&self) -> bool {
        self.deviation.is_some()
    }
}

/// Fixed-capacity FIFO of latency values; oldest value is evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    capacity: usize,
    samples: VecDeque<f64>,
}

impl Window {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::validation("window capacity must be positive"));
        }
        Ok(Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().copied()
    }

    pub fn push(&mut self, value: f64) -> Result<()> {
        check_latency(value)?;
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(value);
        Ok(())
    }

    pub fn summarize(&self) -> Result<Summary> {
        let count = self.samples.len();
        if count == 0 {
            return Err(Error::NoObservations);
        }
        let n = count as f64;
        let first = self.samples[0];
        if self.samples.iter().all(|&x| x == first) {
            // Constant window: report the exact value rather than sum/n round-off.
            return Ok(Summary {
                mean: first,
                deviation: (count >= 2).then_some(0.0),
                count,
            });
        }
        let mean = self.samples.iter().sum::<f64>() / n;
        let deviation = if count >= 2 {
            let ss: f64 = self.samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            Some((ss / (n - 1.0)).sqrt())
        } else {
            None
        };
        Ok(Summary {
            mean,
            deviation,
            count,
        })
    }
}

/// Collapses the sub-samples observed within one frame into a single value
/// (arithmetic mean).
pub fn aggregate_frame(sub_samples: &[f64]) -> Result<f64> {
    if sub_samples.is_empty() {
        return Err(Error::validation("frame has no latency sub-samples"));
    }
    for &v in sub_samples {
        check_latency(v)?;
    }
    Ok(sub_samples.iter().sum::<f64>() / sub_samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn filled(capacity: usize, values: &[f64]) -> Window {
        let mut w = Window::new(capacity).unwrap();
        for &v in values {
            w.push(v).unwrap();
        }
        w
    }

    #[test]
    fn push_evicts_oldest() {
        let w = filled(3, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(w.iter().collect::<Vec<_>>(), vec![0.2, 0.3, 0.4]);
    }

    #[test]
    fn push_into_empty_and_unit_capacity() {
        let w = filled(3, &[0.4]);
        assert_eq!(w.iter().collect::<Vec<_>>(), vec![0.4]);
        let w = filled(1, &[0.1, 0.2]);
        assert_eq!(w.iter().collect::<Vec<_>>(), vec![0.2]);
    }

    #[test]
    fn push_rejects_bad_values() {
        let mut w = Window::new(3).unwrap();
        for bad in [0.0, -0.1, f64::NAN, f64::INFINITY] {
            assert!(matches!(w.push(bad), Err(Error::Validation(_))));
        }
        assert!(w.is_empty());
        assert!(Window::new(0).is_err());
    }

    #[test]
    fn summarize_examples() {
        let s = filled(5, &[0.4, 0.4, 0.4]).summarize().unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert_eq!(s.deviation, Some(0.0));
        assert_eq!(s.count, 3);

        let s = filled(5, &[0.3, 0.5]).summarize().unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert!((s.deviation.unwrap() - 0.1414214).abs() < 1e-6);
        assert_eq!(s.count, 2);

        let s = filled(5, &[0.4]).summarize().unwrap();
        assert_eq!(s.mean, 0.4);
        assert_eq!(s.deviation, None);
        assert_eq!(s.count, 1);
    }

    #[test]
    fn summarize_empty_is_error() {
        let w = Window::new(4).unwrap();
        assert!(matches!(w.summarize(), Err(Error::NoObservations)));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_frame(&[0.4]).unwrap(), 0.4);
        assert!((aggregate_frame(&[0.3, 0.5]).unwrap() - 0.4).abs() < 1e-15);
        assert!((aggregate_frame(&[0.2, 0.2, 0.8]).unwrap() - 0.4).abs() < 1e-15);
        assert!(aggregate_frame(&[]).is_err());
        assert!(aggregate_frame(&[0.2, 0.0]).is_err());
    }

    #[test]
    fn sample_rejects_nonpositive() {
        assert!(LatencySample::new(0, 0, 0.0).is_err());
        assert!(LatencySample::new(3, 1, 0.25).is_ok());
    }

    // Naive textbook recomputation over the last min(len, W) pushed values.
    fn naive(values: &[f64], capacity: usize) -> (f64, Option<f64>, usize) {
        let tail = &values[values.len().saturating_sub(capacity)..];
        let n = tail.len();
        let mut sum = 0.0;
        for v in tail {
            sum += v;
        }
        let mean = sum / n as f64;
        let dev = if n < 2 {
            None
        } else {
            let mut acc = 0.0;
            for v in tail {
                acc += (v - mean).powi(2);
            }
            Some((acc / (n as f64 - 1.0)).sqrt())
        };
        (mean, dev, n)
    }

    proptest! {
        #[test]
        fn summary_matches_recomputation(
            capacity in 1usize..30,
            values in prop::collection::vec(0.001f64..2.0, 1..80),
        ) {
            let w = filled(capacity, &values);
            prop_assert!(w.len() <= capacity);
            let s = w.summarize().unwrap();
            let (mean, dev, n) = naive(&values, capacity);
            prop_assert_eq!(s.count, n);
            prop_assert!((s.mean - mean).abs() <= 1e-12);
            match (s.deviation, dev) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "deviation mismatch {:?}", other),
            }
        }

        #[test]
        fn zero_deviation_iff_constant(
            values in prop::collection::vec(prop::sample::select(vec![0.1f64, 0.25, 0.4]), 2..20),
        ) {
            let s = filled(values.len(), &values).summarize().unwrap();
            let constant = values.iter().all(|&v| v == values[0]);
            prop_assert_eq!(s.deviation.unwrap() == 0.0, constant);
        }
    }
}
