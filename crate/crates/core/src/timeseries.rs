use crate::error::{Error, Result};

/// Uniformly sampled record of a scalar signal, by convention magnetic
/// field in tesla unless stated otherwise at the call site.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    sample_rate: f64,
    start_time: f64,
    samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(sample_rate: f64, start_time: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::validation(format!(
                "sample rate must be positive and finite, got {sample_rate}"
            )));
        }
        Ok(Self {
            sample_rate,
            start_time,
            samples,
        })
    }

    /// Build a series by evaluating `f` at each sample instant.
    pub fn from_fn(
        sample_rate: f64,
        start_time: f64,
        n: usize,
        mut f: impl FnMut(f64) -> f64,
    ) -> Result<Self> {
        let dt = 1.0 / sample_rate;
        let samples = (0..n).map(|i| f(start_time + i as f64 * dt)).collect();
        Self::new(sample_rate, start_time, samples)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration covered by the samples in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Time stamp of sample `i`.
    pub fn time_at(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.sample_rate
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Sub-series of `n` samples starting at sample `offset`.
    pub fn window(&self, offset: usize, n: usize) -> Result<TimeSeries> {
        if offset + n > self.samples.len() {
            return Err(Error::validation(format!(
                "window [{offset}, {}) exceeds series length {}",
                offset + n,
                self.samples.len()
            )));
        }
        TimeSeries::new(
            self.sample_rate,
            self.time_at(offset),
            self.samples[offset..offset + n].to_vec(),
        )
    }

    /// Add `other` sample-wise; lengths and rates must match.
    pub fn add(&mut self, other: &TimeSeries) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::validation(format!(
                "length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if (other.sample_rate - self.sample_rate).abs() > 1e-9 * self.sample_rate {
            return Err(Error::validation("sample rate mismatch".to_string()));
        }
        for (a, b) in self.samples.iter_mut().zip(other.samples.iter()) {
            *a += b;
        }
        Ok(())
    }
}
