use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioSource {
    Sampled,
    Historical,
}

/// `N` duration realizations of `n` jobs, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    jobs: usize,
    data: Vec<f64>,
    pub source: ScenarioSource,
}

impl ScenarioSet {
    pub fn new(scenarios: Vec<Vec<f64>>, source: ScenarioSource) -> Result<Self> {
        let jobs = scenarios.first().map(Vec::len).ok_or_else(|| Error::invalid("scenario set is empty"))?;
        if jobs < 2 {
            return Err(Error::invalid("scenarios need at least 2 jobs"));
        }
        let mut data = Vec::with_capacity(jobs * scenarios.len());
        for s in &scenarios {
            if s.len() != jobs {
                return Err(Error::LengthMismatch { expected: jobs, actual: s.len() });
            }
            if s.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::invalid("scenario durations must be finite and non-negative"));
            }
            data.extend_from_slice(s);
        }
        Ok(ScenarioSet { jobs, data, source })
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.jobs
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn scenario(&self, j: usize) -> &[f64] {
        &self.data[j * self.jobs..(j + 1) * self.jobs]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.jobs)
    }

    /// Scenarios as a slice of rows, for chunked kernels.
    pub fn rows(&self) -> Vec<&[f64]> {
        self.iter().collect()
    }

    pub fn all_durations(&self) -> &[f64] {
        &self.data
    }

    /// Durations of job `i` across scenarios.
    pub fn job_column(&self, i: usize) -> Vec<f64> {
        self.iter().map(|s| s[i]).collect()
    }

    /// Resample `N` scenarios with replacement.
    pub fn bootstrap(&self, seed: u64) -> ScenarioSet {
        use rand::Rng;
        let mut rng = seeded(seed);
        let n = self.len();
        let mut data = Vec::with_capacity(self.data.len());
        for _ in 0..n {
            let j = rng.random_range(0..n);
            data.extend_from_slice(self.scenario(j));
        }
        ScenarioSet { jobs: self.jobs, data, source: self.source }
    }
}
