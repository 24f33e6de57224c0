//! Waiting/idling recursion and the linear schedule cost.
//!
//! Jobs arrive punctually in a fixed order. Job `i` is scheduled `S[i-1]`
//! time units after job `i-1`; if the server is still busy it waits, if it
//! is already free the server idles:
//!
//! ```text
//! W[0] = I[0] = 0
//! W[i] - I[i] = W[i-1] + p[i-1] - S[i-1],   W[i], I[i] >= 0, W[i]·I[i] = 0
//! cost       = cW·ΣW + cI·ΣI
//! ```
//!
//! The last job's duration and allowance never enter the cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative time allowances, one per job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(Vec<f64>);

impl Schedule {
    pub fn new(allowances: Vec<f64>) -> Result<Self> {
        check_vector("allowance", &allowances)?;
        Ok(Schedule(allowances))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// One realization of the job durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DurationVector(Vec<f64>);

impl DurationVector {
    pub fn new(durations: Vec<f64>) -> Result<Self> {
        check_vector("duration", &durations)?;
        Ok(DurationVector(durations))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_vector(what: &str, xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 jobs, got {}", xs.len())));
    }
    if let Some(x) = xs.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::invalid(format!("{what} must be finite and non-negative, got {x}")));
    }
    Ok(())
}

/// Unit costs of server waiting (job late start) and idling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub wait_cost: f64,
    pub idle_cost: f64,
}

impl CostParams {
    pub fn new(wait_cost: f64, idle_cost: f64) -> Result<Self> {
        let ok = wait_cost.is_finite() && idle_cost.is_finite() && wait_cost >= 0.0 && idle_cost >= 0.0;
        if !ok || wait_cost + idle_cost <= 0.0 {
            return Err(Error::invalid(format!(
                "costs must be non-negative with a positive sum, got cW={wait_cost}, cI={idle_cost}"
            )));
        }
        Ok(CostParams { wait_cost, idle_cost })
    }

    /// Newsvendor critical ratio `cW / (cW + cI)`.
    pub fn critical_ratio(&self) -> f64 {
        self.wait_cost / (self.wait_cost + self.idle_cost)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub waits: Vec<f64>,
    pub idles: Vec<f64>,
    pub total: f64,
}

fn check_pair(schedule: &Schedule, realization: &DurationVector) -> Result<()> {
    if schedule.len() != realization.len() {
        return Err(Error::LengthMismatch { expected: schedule.len(), actual: realization.len() });
    }
    Ok(())
}

pub fn evaluate_schedule(schedule: &Schedule, realization: &DurationVector, costs: &CostParams) -> Result<CostBreakdown> {
    check_pair(schedule, realization)?;
    let s = schedule.as_slice();
    let p = realization.as_slice();
    let n = s.len();
    let mut waits = vec![0.0; n];
    let mut idles = vec![0.0; n];
    for i in 1..n {
        let arg = waits[i - 1] + p[i - 1] - s[i - 1];
        waits[i] = arg.max(0.0);
        idles[i] = (-arg).max(0.0);
    }
    let total = costs.wait_cost * waits.iter().sum::<f64>() + costs.idle_cost * idles.iter().sum::<f64>();
    Ok(CostBreakdown { waits, idles, total })
}

pub fn schedule_subgradient(schedule: &Schedule, realization: &DurationVector, costs: &CostParams) -> Result<Vec<f64>> {
    check_pair(schedule, realization)?;
    let mut grad = vec![0.0; schedule.len()];
    accumulate_subgradient(schedule.as_slice(), realization.as_slice(), costs, 1.0, &mut grad);
    Ok(grad)
}

/// Total cost without allocating. Slices must have equal length; only the
/// first `len - 1` allowances and durations are read.
#[inline]
pub fn total_cost(allowances: &[f64], durations: &[f64], costs: &CostParams) -> f64 {
    debug_assert_eq!(allowances.len(), durations.len());
    let mut wait = 0.0;
    let mut sum_wait = 0.0;
    let mut sum_idle = 0.0;
    for i in 1..allowances.len() {
        let arg = wait + durations[i - 1] - allowances[i - 1];
        if arg > 0.0 {
            wait = arg;
            sum_wait += arg;
        } else {
            wait = 0.0;
            sum_idle -= arg;
        }
    }
    costs.wait_cost * sum_wait + costs.idle_cost * sum_idle
}

/// Adds `weight ·` a subgradient of [`total_cost`] with respect to the
/// allowances into `grad`. At an exact kink (recursion argument 0) both
/// branches are treated as inactive.
pub fn accumulate_subgradient(allowances: &[f64], durations: &[f64], costs: &CostParams, weight: f64, grad: &mut [f64]) {
    let n = allowances.len();
    // args[i] = W[i-1] + p[i-1] - S[i-1] for i in 1..n
    let mut args = [0.0f64; 64];
    let mut heap;
    let args: &mut [f64] = if n <= 64 {
        &mut args[..n]
    } else {
        heap = vec![0.0; n];
        &mut heap
    };
    let mut wait = 0.0;
    for i in 1..n {
        let arg = wait + durations[i - 1] - allowances[i - 1];
        args[i] = arg;
        wait = arg.max(0.0);
    }
    // d(cost)/d(arg[i]) accumulated backwards; arg[i+1] depends on W[i].
    let mut downstream = 0.0;
    for i in (1..n).rev() {
        let arg = args[i];
        let d_arg = if arg > 0.0 {
            costs.wait_cost + downstream
        } else if arg < 0.0 {
            -costs.idle_cost
        } else {
            0.0
        };
        // d(arg[i]) / d(S[i-1]) = -1
        grad[i - 1] -= weight * d_arg;
        downstream = d_arg;
    }
}
