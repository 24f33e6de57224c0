use serde::{Deserialize, Serialize};

use super::dro::{solve_dro, AmbiguitySet, DroConfig, DroResult};
use super::saa::{solve_saa, SaaConfig, SaaResult};
use super::scenarios::ScenarioSet;
use crate::cost::CostParams;
use crate::distributions::{fit_normal_mle, MomentSummary, TRUNCATION_STDS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroVsSaa {
    pub costs: CostParams,
    pub fitted_mean: f64,
    pub fitted_std: f64,
    pub saa: SaaResult,
    pub dro: DroResult,
    /// `dro.worst_case_value / saa.objective`.
    pub ratio: f64,
}

/// Ambiguity set fitted to pooled scenario data: every job gets the normal
/// MLE mean/std as moment targets and `points` equispaced grid values on
/// `[0, mean + 6·std]`.
pub fn ambiguity_from_scenarios(scenarios: &ScenarioSet, orders: &[u32], points: usize) -> Result<(AmbiguitySet, f64, f64)> {
    if points < 2 {
        return Err(Error::invalid("DRO grid needs at least 2 points"));
    }
    let (mean, std) = fit_normal_mle(scenarios.all_durations())?;
    let summary = MomentSummary::from_mean_std(mean, std, orders)?;
    let hi = mean + TRUNCATION_STDS * std;
    let grid: Vec<f64> = (0..points).map(|k| hi * k as f64 / (points - 1) as f64).collect();
    let targets: Vec<f64> = orders.iter().map(|&q| summary.get(q).expect("order present")).collect();
    let n = scenarios.jobs();
    let amb = AmbiguitySet::new(vec![grid; n], orders.to_vec(), vec![targets; n])?;
    Ok((amb, mean, std))
}

/// Runs SAA on the scenarios and DRO on moments fitted to the same data,
/// and checks that the worst-case value is at least the SAA objective.
pub fn dro_vs_saa_report(
    scenarios: &ScenarioSet,
    costs: &CostParams,
    orders: &[u32],
    grid_points: usize,
    saa_cfg: &SaaConfig,
    dro_cfg: &DroConfig,
) -> Result<DroVsSaa> {
    let (amb, fitted_mean, fitted_std) = ambiguity_from_scenarios(scenarios, orders, grid_points)?;
    let saa = solve_saa(scenarios, costs, saa_cfg)?;
    let dro = solve_dro(&amb, costs, dro_cfg)?;
    if dro.worst_case_value < saa.objective - 1e-6 {
        return Err(Error::Data(format!(
            "DRO worst case {} is below the SAA objective {}",
            dro.worst_case_value, saa.objective
        )));
    }
    let ratio = dro.worst_case_value / saa.objective;
    Ok(DroVsSaa { costs: *costs, fitted_mean, fitted_std, saa, dro, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::scenarios::ScenarioSource;
    use rand::Rng;

    #[test]
    fn dro_dominates_saa_on_random_data() {
        let mut rng = crate::rng::seeded(21);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.random_range(1.0..6.0)).collect()).collect();
        let sc = ScenarioSet::new(rows, ScenarioSource::Historical).unwrap();
        let costs = CostParams::new(1.0, 1.0).unwrap();
        let r = dro_vs_saa_report(&sc, &costs, &[1, 2], 11, &SaaConfig::default(), &DroConfig::default()).unwrap();
        assert!(r.dro.worst_case_value >= r.saa.objective - 1e-6);
        assert!(r.ratio >= 1.0);
    }

    #[test]
    fn matched_two_point_data_gives_equal_values() {
        // data is exactly the two-point distribution {0, 2} on job 1
        let rows = vec![vec![0.0, 1.0], vec![2.0, 1.0]];
        let sc = ScenarioSet::new(rows, ScenarioSource::Historical).unwrap();
        let costs = CostParams::new(1.0, 1.0).unwrap();
        let saa = solve_saa(&sc, &costs, &SaaConfig::default()).unwrap();
        let amb = AmbiguitySet::new(vec![vec![0.0, 2.0], vec![1.0]], vec![1], vec![vec![1.0], vec![1.0]]).unwrap();
        let dro = solve_dro(&amb, &costs, &DroConfig::default()).unwrap();
        assert!((dro.worst_case_value - saa.objective).abs() < 1e-6);
    }
}
