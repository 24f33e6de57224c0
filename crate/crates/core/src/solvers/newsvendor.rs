use crate::cost::CostParams;
use crate::distributions::{quantile, DistributionSpec};
use crate::error::{Error, Result};

/// Optimal first allowance of a two-job instance: the `cW/(cW+cI)`
/// quantile of the first job's duration.
///
/// The classic newsvendor result is sometimes quoted with the ratio
/// inverted (`cI/(cI+cW)`); here waiting plays the role of underage, so the
/// allowance must grow with `cW`.
pub fn newsvendor_allowance(spec: &DistributionSpec, costs: &CostParams) -> Result<f64> {
    let q = costs.critical_ratio();
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!(
            "degenerate costs (cW={}, cI={}): critical ratio {q} is not in (0, 1)",
            costs.wait_cost, costs.idle_cost
        )));
    }
    quantile(spec, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::total_cost;
    use crate::distributions::{default_support, make_spec, Family};
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetric_costs_give_the_median() {
        let spec = make_spec(Family::Logistic, 3.0, 0.5, (0.0, 6.0)).unwrap();
        let s = newsvendor_allowance(&spec, &CostParams::new(2.0, 2.0).unwrap()).unwrap();
        assert_abs_diff_eq!(s, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn uniform_three_to_one() {
        let spec = make_spec(Family::Uniform, 0.5, 1.0 / 12f64.sqrt(), (0.0, 1.0)).unwrap();
        let s = newsvendor_allowance(&spec, &CostParams::new(3.0, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(s, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_costs_are_rejected() {
        let spec = make_spec(Family::Uniform, 0.5, 0.1, (0.0, 1.0)).unwrap();
        assert!(newsvendor_allowance(&spec, &CostParams::new(0.0, 1.0).unwrap()).is_err());
        assert!(newsvendor_allowance(&spec, &CostParams::new(1.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn allowance_minimises_expected_cost_on_a_grid() {
        // oracle: E[cost] by Gauss-Legendre-free midpoint quadrature of the
        // quantile function, minimised by grid search
        for fam in Family::ALL {
            let spec = make_spec(fam, 2.0, 0.5, default_support(2.0, 0.5)).unwrap();
            let costs = CostParams::new(2.5, 1.0).unwrap();
            let m = 4000;
            let draws: Vec<f64> = (0..m)
                .map(|k| quantile(&spec, (k as f64 + 0.5) / m as f64).unwrap())
                .collect();
            let expected = |s: f64| draws.iter().map(|&p| total_cost(&[s, 0.0], &[p, 0.0], &costs)).sum::<f64>() / m as f64;
            let step = 1e-3;
            let (best_s, _) = (0..5000)
                .map(|k| k as f64 * step)
                .map(|s| (s, expected(s)))
                .fold((0.0, f64::INFINITY), |acc, (s, v)| if v < acc.1 { (s, v) } else { acc });
            let s = newsvendor_allowance(&spec, &costs).unwrap();
            assert!((s - best_s).abs() <= 2.0 * step + 2.0 / m as f64, "{fam}: {s} vs grid {best_s}");
        }
    }
}
